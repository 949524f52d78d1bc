fn main() {
    std::process::exit(scalegate_cli::run(std::env::args()));
}
