fn main() {
    std::process::exit(rwgd_cli::main_with(std::env::args_os()));
}
