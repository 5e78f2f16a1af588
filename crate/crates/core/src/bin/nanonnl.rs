fn main() {
    std::process::exit(nanonnl::cli::run(std::env::args_os()));
}
