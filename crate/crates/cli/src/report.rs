use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::commands::Context;
use crate::config::GroupDigest;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Inconclusive => 4,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
        }
    }
}

pub struct Outcome {
    pub command: &'static str,
    /// Config keys the command read beyond seed, group and field.
    pub block: Value,
    pub status: Status,
    pub report: Value,
    pub text: String,
    pub csv: Option<String>,
}

/// What a failed command still reports.
pub struct Failure {
    pub command: &'static str,
    pub block: Value,
    pub error: CliError,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    command: &'a str,
    seed: u64,
    group: GroupDigest,
    field: &'a htype_core::FieldSpec,
    block: &'a Value,
}

#[derive(Serialize)]
struct Document<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_digest: String,
    status: &'a str,
    exit_code: u8,
    report: &'a Value,
}

fn digest(ctx: &Context, command: &str, block: &Value) -> String {
    let input = DigestInput {
        command,
        seed: ctx.cfg.seed,
        group: GroupDigest::of(&ctx.group.spec),
        field: &ctx.cfg.field,
        block,
    };
    let bytes = serde_json::to_vec(&input).expect("digest input serialises");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn render(ctx: &Context, command: &str, block: &Value, status: &str, code: u8, report: &Value) -> String {
    let doc = Document {
        command,
        version: htype_core::VERSION,
        seed: ctx.cfg.seed,
        config_digest: digest(ctx, command, block),
        status,
        exit_code: code,
        report,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("document serialises");
    s.push('\n');
    s
}

fn write(path: &std::path::Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError {
        code: 2,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

pub fn emit(ctx: &Context, result: Result<Outcome, Failure>, json: bool) -> Result<Status, CliError> {
    let output = ctx.cfg.output.as_deref();
    match result {
        Ok(out) => {
            let doc = render(ctx, out.command, &out.block, out.status.as_str(), out.status.code(), &out.report);
            match (&out.csv, output) {
                (Some(csv), Some(path)) => {
                    write(path, csv)?;
                    write(&path.with_extension("json"), &doc)?;
                }
                (None, Some(path)) => write(path, &doc)?,
                _ => {}
            }
            if json {
                print!("{doc}");
            } else {
                if let (Some(csv), None) = (&out.csv, output) {
                    print!("{csv}");
                    for line in out.text.lines() {
                        println!("# {line}");
                    }
                } else {
                    print!("{}", out.text);
                }
            }
            Ok(out.status)
        }
        Err(f) => {
            let status = if f.error.code == 3 { "precondition" } else { "error" };
            let report = serde_json::json!({ "error": f.error.message });
            let doc = render(ctx, f.command, &f.block, status, f.error.code, &report);
            if let Some(path) = output {
                let path = if f.command == "harnack run" { path.with_extension("json") } else { path.to_path_buf() };
                write(&path, &doc)?;
            }
            if json {
                print!("{doc}");
            }
            Err(f.error)
        }
    }
}
