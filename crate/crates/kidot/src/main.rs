fn main() {
    std::process::exit(kidot::cli::main_with_args(std::env::args_os()));
}
