//! SDPA sparse format export.
//!
//! SDPA solves `max <F0, Y>` subject to `<Fi, Y> = ci`, `Y` PSD, so rows map
//! to `Fi`, the right-hand side to `c` and `F0 = -C`. Free variables are
//! split as `x = x+ - x-` in one trailing diagonal (LP) block.

use std::io::Write;

use super::SdpProblem;

pub fn write_sdpa<W: Write>(problem: &SdpProblem, mut out: W) -> std::io::Result<()> {
    let nf = problem.n_free;
    let nblocks = problem.n_blocks() + usize::from(nf > 0);
    writeln!(
        out,
        "\"subvalue export: {} rows, {} free variables split into an LP block",
        problem.n_rows(),
        nf
    )?;
    writeln!(out, "{}", problem.n_rows())?;
    writeln!(out, "{nblocks}")?;
    let mut sizes: Vec<String> = problem.block_sizes.iter().map(|n| n.to_string()).collect();
    if nf > 0 {
        sizes.push(format!("-{}", 2 * nf));
    }
    writeln!(out, "{}", sizes.join(" "))?;
    let rhs: Vec<String> = problem.rhs.iter().map(|v| format!("{v}")).collect();
    writeln!(out, "{}", rhs.join(" "))?;
    for (b, entries) in problem.block_objective.iter().enumerate() {
        for e in entries {
            writeln!(out, "0 {} {} {} {}", b + 1, e.i + 1, e.j + 1, -e.val)?;
        }
    }
    let lp = problem.n_blocks() + 1;
    for (k, &c) in problem.free_objective.iter().enumerate() {
        if c != 0.0 {
            writeln!(out, "0 {lp} {} {} {}", k + 1, k + 1, -c)?;
            writeln!(out, "0 {lp} {} {} {}", nf + k + 1, nf + k + 1, c)?;
        }
    }
    // Row-major emission: all coefficients of row r, blocks in order.
    let mut by_row: Vec<Vec<(usize, usize, usize, f64)>> = vec![Vec::new(); problem.n_rows()];
    for (b, entries) in problem.block_entries.iter().enumerate() {
        for e in entries {
            by_row[e.row].push((b + 1, e.i + 1, e.j + 1, e.val));
        }
    }
    for &(r, k, v) in &problem.free_entries {
        by_row[r].push((lp, k + 1, k + 1, v));
        by_row[r].push((lp, nf + k + 1, nf + k + 1, -v));
    }
    for (r, entries) in by_row.iter().enumerate() {
        for &(b, i, j, v) in entries {
            writeln!(out, "{} {b} {i} {j} {v}", r + 1)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::SdpBuilder;
    use super::*;

    #[test]
    fn small_export() {
        let mut b = SdpBuilder::new();
        let blk = b.add_block(2);
        let f = b.add_free(1);
        let r = b.add_row(1.0);
        b.block_coeff(r, blk, 0, 1, 0.5);
        b.free_coeff(r, f, 2.0);
        b.block_objective(blk, 0, 0, 1.0);
        let mut buf = Vec::new();
        write_sdpa(&b.build(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "2");
        assert_eq!(lines[3], "2 -2");
        assert_eq!(lines[5], "0 1 1 1 -1");
        assert!(lines.contains(&"1 1 1 2 0.5"));
        assert!(lines.contains(&"1 2 2 2 -2"));
    }
}
