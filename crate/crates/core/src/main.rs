use std::process::ExitCode;

fn main() -> ExitCode {
    let report = nrdil::cli::run(std::env::args_os());
    println!("{}", report.to_json());
    ExitCode::from(report.exit_code() as u8)
}
