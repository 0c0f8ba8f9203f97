fn main() {
    std::process::exit(deformgen::cli::main_with(std::env::args_os()));
}
