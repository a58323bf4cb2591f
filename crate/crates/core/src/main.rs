fn main() -> std::process::ExitCode {
    alphagan::cli::run(std::env::args_os())
}
