fn main() {
    std::process::exit(autoreset_cli::main_with_args(std::env::args_os()));
}
