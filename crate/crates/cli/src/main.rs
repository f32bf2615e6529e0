fn main() {
    std::process::exit(gmclab_cli::run_from_env());
}
