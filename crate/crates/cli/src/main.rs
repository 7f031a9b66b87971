fn main() {
    std::process::exit(stfgcn_cli::run(std::env::args_os()));
}
