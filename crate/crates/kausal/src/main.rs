fn main() {
    std::process::exit(kausal::cli::main_with_args(std::env::args_os()));
}
