fn main() {
    std::process::exit(inst4dgs::cli::main_with(std::env::args_os()));
}
