fn main() {
    std::process::exit(fedclave::cli::run(std::env::args()));
}
