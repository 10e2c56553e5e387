fn main() {
    std::process::exit(mmen::cli::main_with_args(std::env::args().collect()));
}
