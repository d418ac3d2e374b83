fn main() {
    std::process::exit(dyadic_t1::cli::run(std::env::args_os()));
}
