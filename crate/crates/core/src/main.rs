fn main() {
    std::process::exit(fundalpha::cli::main(std::env::args_os()));
}
