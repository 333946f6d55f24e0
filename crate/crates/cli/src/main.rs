fn main() {
    std::process::exit(exactpert_cli::run(std::env::args().collect()));
}
