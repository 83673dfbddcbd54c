fn main() {
    std::process::exit(fan_cli::main_with(std::env::args_os()));
}
