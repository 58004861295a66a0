fn main() {
    let code = spinadapt_runner::cli::cli_main(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
