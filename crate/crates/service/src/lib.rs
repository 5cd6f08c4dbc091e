//! HTTP service over the annotation store.

pub mod api;
pub mod config;
pub mod ops;

use std::net::{Ipv4Addr, SocketAddr};

use ifspref_core::{Store, StoreError};
use thiserror::Error;

pub use api::{router, AppState};
pub use config::ServiceConfig;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Opens the store under `config.data_dir` and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    config.validate()?;
    let store = Store::open(&config.data_dir)?;
    let state = AppState::new(store, config.default_method);
    let app = router(state, config.cors_allowed_origin.as_deref());
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, config.listen_port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
