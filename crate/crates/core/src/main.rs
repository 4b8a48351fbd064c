fn main() {
    std::process::exit(povi::cli::main_with_args(std::env::args_os()));
}
