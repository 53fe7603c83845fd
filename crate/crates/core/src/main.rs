fn main() -> std::process::ExitCode {
    tmda::cli::main_with_args(std::env::args_os())
}
