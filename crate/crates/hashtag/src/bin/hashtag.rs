fn main() -> std::process::ExitCode {
    hashtag::cli::main_with_args(std::env::args_os())
}
