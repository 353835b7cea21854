fn main() {
    std::process::exit(omnidistill::cli::main_with_args(std::env::args_os()));
}
