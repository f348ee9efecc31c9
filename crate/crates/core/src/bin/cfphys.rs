fn main() {
    std::process::exit(cfphys::cli::main_with_args(std::env::args_os()));
}
