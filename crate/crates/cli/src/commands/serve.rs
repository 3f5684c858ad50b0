//! `sci serve-toy`: the toy backend on the wire protocol.

use std::net::TcpListener;
use std::sync::Arc;

use sci_core::engine::toy::ToyLm;
use sci_core::engine::wire::{serve_stream, serve_tcp};

use crate::config::{BackendConfig, RunConfig};
use crate::CliError;

pub fn run(cfg: &RunConfig, listen: Option<&str>) -> Result<(), CliError> {
    let spec = match &cfg.backend {
        BackendConfig::Toy { spec } => *spec,
        BackendConfig::Wire { .. } => {
            return Err(CliError::Config("serve-toy needs a config whose backend kind is toy".into()))
        }
    };
    let model = ToyLm::new(spec);
    match listen {
        None => {
            let stdin = std::io::stdin();
            serve_stream(&model, stdin.lock(), std::io::stdout().lock())
                .map_err(|e| CliError::Backend(format!("stdio transport: {e}")))
        }
        Some(addr) => {
            let listener =
                TcpListener::bind(addr).map_err(|e| CliError::Backend(format!("cannot listen on {addr}: {e}")))?;
            let local = listener.local_addr().map_err(|e| CliError::Backend(e.to_string()))?;
            eprintln!("listening on {local}");
            serve_tcp(Arc::new(model), listener).map_err(|e| CliError::Backend(e.to_string()))
        }
    }
}
