use std::process::ExitCode;

fn main() -> ExitCode {
    match branchfit_cli::main_with(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
