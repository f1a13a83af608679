//! Diagnostics CSV, convergence tables and legacy ASCII VTK snapshots.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chimhd_core::diagnostics::convergence_orders;
use chimhd_core::{ErrorReport, Norm, State, StepLog};

pub const DIAGNOSTICS_HEADER: &str = "n,t,energy,dissipation,mass,div_j_norm,res_ch,res_j,res_ns";

pub fn create(path: &Path) -> io::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new)
}

pub fn diagnostics_row(log: &StepLog) -> String {
    let [r1, r2, r3] = log.residuals;
    format!(
        "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        log.n, log.t, log.energy, log.dissipation, log.mass, log.div_j, r1, r2, r3
    )
}

pub fn snapshot_path(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("fields_{n:04}.vtk"))
}

/// Steps at which snapshots are written: `0, k, 2k, ...` and the last step.
pub fn is_snapshot_step(n: usize, every: usize, last: usize) -> bool {
    n == last || (every > 0 && n.is_multiple_of(every))
}

fn scalars(w: &mut impl Write, name: &str, values: impl Iterator<Item = f64>) -> io::Result<()> {
    writeln!(w, "SCALARS {name} double 1\nLOOKUP_TABLE default")?;
    for v in values {
        writeln!(w, "{v:.16e}")?;
    }
    Ok(())
}

/// P1 fields and the vertex part of the velocity as point data; the
/// potential, `div J` and the cell average of `J` as cell data.
pub fn write_vtk(w: &mut impl Write, state: &State) -> io::Result<()> {
    let mesh = state.phi.space.mesh();
    let (nv, nc) = (mesh.num_vertices(), mesh.num_cells());
    writeln!(w, "# vtk DataFile Version 2.0")?;
    writeln!(w, "chimhd step {} t={:.16e}", state.n, state.time)?;
    writeln!(w, "ASCII\nDATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for x in mesh.vertices() {
        writeln!(w, "{:.16e} {:.16e} 0", x[0], x[1])?;
    }
    writeln!(w, "CELLS {nc} {}", 4 * nc)?;
    for c in mesh.cells() {
        writeln!(w, "3 {} {} {}", c[0], c[1], c[2])?;
    }
    writeln!(w, "CELL_TYPES {nc}")?;
    for _ in 0..nc {
        writeln!(w, "5")?;
    }

    writeln!(w, "POINT_DATA {nv}")?;
    scalars(w, "phi", state.phi.values.iter().copied())?;
    scalars(w, "mu", state.mu.values.iter().copied())?;
    scalars(w, "p", state.p.values.iter().copied())?;
    let vel = &state.u.space;
    writeln!(w, "VECTORS u double")?;
    for v in 0..nv {
        let (a, b) = (state.u.values[vel.mini_vertex_dof(0, v)], state.u.values[vel.mini_vertex_dof(1, v)]);
        writeln!(w, "{a:.16e} {b:.16e} 0")?;
    }

    writeln!(w, "CELL_DATA {nc}")?;
    scalars(w, "phi_pot", state.phi_pot.values.iter().copied())?;
    scalars(w, "div_j", (0..nc).map(|t| state.j.div_rt0(t)))?;
    writeln!(w, "VECTORS j double")?;
    let centroid = [1.0 / 3.0; 3];
    for t in 0..nc {
        let j = state.j.eval_vector(t, &centroid);
        writeln!(w, "{:.16e} {:.16e} 0", j[0], j[1])?;
    }
    Ok(())
}

/// `tau,h,<norm>,<norm>_order,...,div_j`; the first row has empty orders.
pub fn write_rates_csv(w: &mut impl Write, reports: &[ErrorReport]) -> io::Result<()> {
    let mut header = vec!["tau".to_string(), "h".to_string()];
    for n in Norm::ALL {
        header.push(n.name().into());
        header.push(format!("{}_order", n.name()));
    }
    header.push("div_j".into());
    writeln!(w, "{}", header.join(","))?;
    for (r, orders) in reports.iter().zip(convergence_orders(reports)) {
        let mut row = vec![format!("{:.16e}", r.tau), format!("{:.16e}", r.h)];
        for n in Norm::ALL {
            row.push(format!("{:.16e}", r.get(n)));
            row.push(orders[n.index()].map(|o| format!("{o:.6}")).unwrap_or_default());
        }
        row.push(format!("{:.16e}", r.div_j));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn rates_markdown(reports: &[ErrorReport]) -> String {
    let mut s = String::from("| tau | h |");
    for n in Norm::ALL {
        s.push_str(&format!(" {} (order) |", n.name()));
    }
    s.push_str(" div_j |\n|---|---|");
    for _ in Norm::ALL {
        s.push_str("---|");
    }
    s.push_str("---|\n");
    for (r, orders) in reports.iter().zip(convergence_orders(reports)) {
        s.push_str(&format!("| {} | {:.6} |", r.tau, r.h));
        for n in Norm::ALL {
            match orders[n.index()] {
                Some(o) => s.push_str(&format!(" {:.4e} ({o:.2}) |", r.get(n))),
                None => s.push_str(&format!(" {:.4e} |", r.get(n))),
            }
        }
        s.push_str(&format!(" {:.1e} |\n", r.div_j));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_cadence_counts() {
        let count = |n: usize, k: usize| (0..=n).filter(|&i| is_snapshot_step(i, k, n)).count();
        assert_eq!(count(10, 10), 2);
        assert_eq!(count(10, 3), 5);
        assert_eq!(count(100, 7), 100usize.div_ceil(7) + 1);
        assert_eq!(count(10, 0), 1);
    }

    #[test]
    fn rates_have_one_row_per_report() {
        let r = |tau: f64, e: f64| ErrorReport { tau, h: 0.1, errors: [e; 9], div_j: 0.0 };
        let reports = [r(0.2, 1.0), r(0.1, 0.5), r(0.05, 0.25)];
        let mut buf = Vec::new();
        write_rates_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].contains(",,"));
        assert!(lines[3].contains("1.000000"));
        assert_eq!(rates_markdown(&reports).lines().count(), 5);
    }
}
