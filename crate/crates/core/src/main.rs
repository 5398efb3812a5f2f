fn main() -> std::process::ExitCode {
    anchorsim::cli::main()
}
