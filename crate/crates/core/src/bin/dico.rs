fn main() {
    std::process::exit(dico::cli::main_with_args(std::env::args_os()));
}
