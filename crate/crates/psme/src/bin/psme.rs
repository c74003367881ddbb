fn main() {
    std::process::exit(psme::cli::main_with(std::env::args_os()));
}
