use std::io::Read;
use std::path::Path;

use editflow_core::flow_filter::{filter_document, FilterRequest};
use editflow_core::twin::PROTOCOL_VERSION;

use crate::config::{GatewayFactory, HarnessConfig};
use crate::error::{CliError, CliResult, Classify};
use crate::store::write_json;
use crate::Outcome;

/// Filters one batch document read from `input` (stdin when absent). The
/// response goes to `output`, or to stdout.
pub fn run(cfg: &HarnessConfig, input: Option<&Path>, output: Option<&Path>, prompt: Option<&Path>) -> CliResult<Outcome> {
    let text = match input {
        Some(p) => std::fs::read_to_string(p).or_config(format!("cannot read {}", p.display()))?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).or_config("cannot read stdin")?;
            s
        }
    };
    let req: FilterRequest = serde_json::from_str(&text).or_config("invalid filter request")?;
    if req.protocol_version != PROTOCOL_VERSION {
        return Err(CliError::config(format!(
            "filter request has protocol version {}, expected {PROTOCOL_VERSION}",
            req.protocol_version
        )));
    }
    let cfg_filter = &cfg.simulation.filter_config;
    let prompt = cfg.prompt(prompt)?;
    let gw = GatewayFactory::from_config(cfg, "filter")?.build();
    let resp = filter_document(req, &prompt, &gw, cfg_filter);
    let value = serde_json::to_value(&resp).expect("serializable");
    match output {
        Some(p) => {
            write_json(p, &resp)?;
            Ok(Outcome::ok(
                format!("kept {} of {} candidate(s); wrote {}", resp.kept.len(), resp.decisions.len(), p.display()),
                value,
            ))
        }
        None => Ok(Outcome::raw(value)),
    }
}
