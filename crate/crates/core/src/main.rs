fn main() -> std::process::ExitCode {
    jnd::cli::run()
}
