fn main() -> std::process::ExitCode {
    haarscan::cli::main_entry()
}
