fn main() {
    std::process::exit(nbody_cli::main_with_args(std::env::args_os()));
}
