fn main() -> std::process::ExitCode {
    kyle_ot::cli::main()
}
