fn main() {
    std::process::exit(varinfer_cli::main_with_args(std::env::args_os()));
}
