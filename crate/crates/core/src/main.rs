fn main() {
    std::process::exit(mfclab::cli::main_with_args(std::env::args_os()));
}
