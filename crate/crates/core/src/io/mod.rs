//! File formats: binary snapshots and models, TOML run and control configs,
//! CSV outputs.

mod binary;
mod config;

pub use binary::{
    decode_model, decode_snapshots, encode_model, encode_snapshots, read_model, read_snapshots, write_model,
    write_snapshots, FORMAT_VERSION, MODEL_MAGIC, SNAPSHOT_MAGIC,
};
pub use config::{
    add_pressure_loads, load_mesh, ControlConfig, ForcingSchedule, Impulse, InitialCondition, PressureSegment,
    RunConfig, VertexTarget,
};

use std::io::Write;

/// `step,time,KE` rows.
pub fn write_energy_csv(mut w: impl Write, energies: &[f64], h: f64) -> std::io::Result<()> {
    writeln!(w, "step,time,KE")?;
    for (i, e) in energies.iter().enumerate() {
        writeln!(w, "{i},{:e},{e:e}", i as f64 * h)?;
    }
    Ok(())
}
