fn main() {
    std::process::exit(semisel::cli::main_with(std::env::args_os()));
}
