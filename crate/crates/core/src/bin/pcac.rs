fn main() {
    let code = pcac::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
