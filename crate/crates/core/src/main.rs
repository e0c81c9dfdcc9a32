fn main() -> std::process::ExitCode {
    stan::cli::main_exit()
}
