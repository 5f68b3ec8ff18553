fn main() {
    std::process::exit(selfmodel_lab::cli::run(std::env::args_os()));
}
