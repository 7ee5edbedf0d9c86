use std::io::Write;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let verbose = args.iter().any(|a| a == "-v" || a == "--verbose");
    let level = if verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = ellipfem::cli::run(args, &mut out);
    let _ = out.flush();
    std::process::exit(code);
}
