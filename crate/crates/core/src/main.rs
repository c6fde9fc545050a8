fn main() -> std::process::ExitCode {
    densebody::cli::run(std::env::args_os())
}
