use std::path::PathBuf;

use clap::{Subcommand, ValueEnum};
use draftforge_core::config::Config;
use draftforge_core::mesh::{self, ManufacturabilityReport, PlyEncoding};
use serde::Serialize;

use super::{repair_plan, write_file};
use crate::errors::read_input;
use crate::output::Output;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Encoding {
    Ascii,
    Binary,
}

#[derive(Debug, Subcommand)]
pub enum MeshCmd {
    /// Report watertightness, manifoldness and volume of a PLY file.
    Analyze { input: PathBuf },
    /// Apply a repair plan and write the result as PLY.
    Repair {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Encoding::Binary)]
        encoding: Encoding,
    },
    /// Convert a PLY file to binary STL.
    Convert {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Serialize)]
struct Written {
    input: PathBuf,
    output: PathBuf,
    bytes: usize,
    triangles: usize,
    report: ManufacturabilityReport,
}

fn report_text(r: &ManufacturabilityReport) -> String {
    format!(
        "printable: {}\nvertices {}  triangles {}\nboundary edges {}  nonmanifold edges {}  misoriented edges {}\ncomponents {}  degenerate triangles {}\nvolume {:.4} mm3\nbbox {:?} .. {:?}",
        r.printable,
        r.vertex_count,
        r.triangle_count,
        r.boundary_edge_count,
        r.nonmanifold_edge_count,
        r.inconsistent_orientation_edge_count,
        r.component_count,
        r.degenerate_triangle_count,
        r.signed_volume,
        r.bbox.min,
        r.bbox.max
    )
}

pub fn run(cfg: &Config, cmd: MeshCmd) -> anyhow::Result<Output> {
    match cmd {
        MeshCmd::Analyze { input } => {
            let m = mesh::parse_ply(&read_input(&input)?)?;
            let report = mesh::analyze(&m);
            let text = report_text(&report);
            Output::new(&report, text)
        }
        MeshCmd::Repair { input, out, plan, encoding } => {
            let plan = repair_plan(cfg, plan.as_deref())?;
            let m = mesh::parse_ply(&read_input(&input)?)?;
            let (repaired, report) = mesh::apply_plan(&m, &plan)?;
            let enc = match encoding {
                Encoding::Ascii => PlyEncoding::Ascii,
                Encoding::Binary => PlyEncoding::BinaryF64,
            };
            let bytes = mesh::write_ply(&repaired, enc);
            write_file(&out, &bytes)?;
            let text = format!("wrote {}\n{}", out.display(), report_text(&report));
            Output::new(&Written { input, output: out, bytes: bytes.len(), triangles: repaired.triangle_count(), report }, text)
        }
        MeshCmd::Convert { input, out } => {
            let m = mesh::parse_ply(&read_input(&input)?)?;
            let bytes = mesh::write_stl(&m)?;
            write_file(&out, &bytes)?;
            let report = mesh::analyze(&m);
            let text = format!("wrote {} ({} triangles, printable={})", out.display(), m.triangle_count(), report.printable);
            Output::new(&Written { input, output: out, bytes: bytes.len(), triangles: m.triangle_count(), report }, text)
        }
    }
}
