fn main() {
    std::process::exit(gsreloc::run(std::env::args_os()));
}
