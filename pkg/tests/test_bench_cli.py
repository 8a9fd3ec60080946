import numpy as np
import pytest

from amrwave import bench, cli
from amrwave.amr import AmrSolver
from amrwave.bench import ConfigParseError, parse_config, read_snapshot, write_snapshot
from amrwave.core_types import AmrConfig, ConfigError, NumericBlowup, ring_initial_condition


def cfg(**kw):
    base = dict(mx=24, my=24, max_levels=2, ratios=(2,), t_final=0.03, ring_radius=0.25,
                flag_tolerance=0.02, executor="serial")
    base.update(kw)
    return AmrConfig(**base)


# ---------------------------------------------------------------- config

def test_parse_roundtrip():
    c = cfg(bc=("periodic",) * 4, output_times=(0.0, 0.01), dt_max=0.5)
    assert parse_config(bench.format_config(c)) == c


def test_parse_forms():
    c = parse_config("# comment\nmx = 10  # trailing\nbc = periodic\nconservation_fix = false\n"
                     "ratios = 2, 4\nmax_levels = 3\ndt_max = none\n")
    assert c.mx == 10 and c.bc == ("periodic",) * 4 and c.conservation_fix is False
    assert c.ratios == (2, 4) and c.dt_max is None


@pytest.mark.parametrize("text,line", [
    ("mx = 10\nmxx = 3\n", 2),
    ("mx = 10\n\nmx = 12\n", 3),
    ("conservation_fix = maybe\n", 1),
    ("mx = ten\n", 1),
    ("# ok\nnot a pair\n", 2),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigParseError) as e:
        parse_config(text, "x.cfg")
    assert e.value.lineno == line
    assert f"x.cfg:{line}:" in str(e.value)


def test_invalid_values_are_config_errors():
    with pytest.raises(ConfigError):
        parse_config("cutoff = 1.5\n")


# ---------------------------------------------------------------- snapshots

def test_snapshot_roundtrip(tmp_path):
    s = AmrSolver(cfg())
    s.run()
    path = write_snapshot(s.h, tmp_path / "s.txt")
    snap = read_snapshot(path)
    assert snap.time == s.t and snap.levels == 2
    live = list(s.h.all_patches())
    assert len(snap.patches) == len(live)
    for sp, p in zip(snap.patches, live):
        assert (sp.level, sp.box, sp.dx, sp.dy) == (p.level, p.box, p.dx, p.dy)
        assert np.array_equal(sp.q, p.field.interior)
    assert snap.ncells == bench.instantaneous_cells(s.h)


def test_snapshot_single_level(tmp_path):
    s = AmrSolver(cfg(max_levels=3, ratios=(2, 2), flag_tolerance=10.0))
    assert s.h.patches(2) == []
    snap = read_snapshot(write_snapshot(s.h, tmp_path / "s.txt"))
    assert {p.level for p in snap.patches} == {1}


def test_snapshot_io_error_names_path(tmp_path):
    s = AmrSolver(cfg())
    with pytest.raises(OSError, match="nowhere"):
        write_snapshot(s.h, tmp_path / "nowhere" / "s.txt")


def test_zero_time_run_writes_initial_condition(tmp_path):
    c = cfg(t_final=0.0, output_times=(0.0,))
    rep = bench.run(c, snapshot_dir=tmp_path)
    assert rep.steps == 0 and len(rep.snapshots) == 1
    snap = read_snapshot(rep.snapshots[0])
    ic = ring_initial_condition(c)
    for sp in snap.patches:
        b = sp.box
        x = c.x0 + (np.arange(b.i0, b.i1) + 0.5) * sp.dx
        y = c.y0 + (np.arange(b.j0, b.j1) + 0.5) * sp.dy
        X, Y = np.meshgrid(x, y, indexing="ij")
        expect = ic(X, Y)
        if sp.level == 1:
            # level-1 cells under level 2 hold child averages
            continue
        np.testing.assert_array_equal(sp.q, expect)
    assert snap.ncells == rep.solver.h.ncells()


def test_serial_runs_are_bit_identical(tmp_path):
    c = cfg(output_times=(0.03,))
    a = bench.run(c, snapshot_dir=tmp_path / "a")
    b = bench.run(c, snapshot_dir=tmp_path / "b")
    assert a.snapshots[0].read_bytes() == b.snapshots[0].read_bytes()


def test_blowup_writes_last_good_snapshot(tmp_path):
    c = cfg(max_levels=1, t_final=0.02)
    good = ring_initial_condition(c)

    def bad(x, y):
        q = good(x, y)
        q[0][np.abs(x - 0.5) < 0.03] = np.inf
        return q

    with pytest.raises(NumericBlowup):
        bench.run(c, snapshot_dir=tmp_path, initial_condition=bad)
    assert read_snapshot(tmp_path / "blowup.txt").time == 0.0


# ---------------------------------------------------------------- reports and sweep

def test_report_rows(tmp_path):
    rep = bench.run(cfg())
    assert rep.total_cells == sum(rep.cells_level.values())
    assert rep.accumulate_launches == 2 * sum(rep.level_steps.values())
    path = bench.write_report([rep], tmp_path / "r.csv")
    head, row = path.read_text().splitlines()
    assert head.split(",") == list(bench.REPORT_COLUMNS)
    assert row.startswith("ok,")


def test_sweep_marks_failed_rows():
    def runner(c):
        if c.regrid_interval == 3:
            raise RuntimeError("boom")
        return bench.run(c)

    rows = bench.sweep(cfg(t_final=0.01), [0.6, 0.8], [2, 3], runner=runner)
    assert [(r.cutoff, r.regrid_interval, r.status) for r in rows] == [
        (0.6, 2, "ok"), (0.6, 3, "failed"), (0.8, 2, "ok"), (0.8, 3, "failed")]
    assert "boom" in rows[1].error
    with pytest.raises(ValueError):
        bench.sweep(cfg(), [], [2])


# ---------------------------------------------------------------- CLI

def _write_cfg(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    return p


SMALL = "mx = 20\nmy = 20\nmax_levels = 2\nratios = 2\nt_final = 0.02\nring_radius = 0.25\noutput_times = 0.02\n"


def test_cli_run(tmp_path, capsys):
    p = _write_cfg(tmp_path, SMALL)
    code = cli.main(["run", str(p), "--executor", "serial", "--report", str(tmp_path / "r.csv"),
                     "--snapshots", str(tmp_path / "snaps")])
    assert code == 0
    assert (tmp_path / "r.csv").exists()
    assert len(list((tmp_path / "snaps").glob("snapshot_*.txt"))) == 1


def test_cli_no_fix_and_sweep(tmp_path):
    p = _write_cfg(tmp_path, SMALL)
    assert cli.main(["run", str(p), "--no-conservation-fix", "--max-steps", "1"]) == 0
    out = tmp_path / "s.csv"
    assert cli.main(["sweep", str(p), "--cutoffs", "0.6,0.8", "--intervals", "2",
                     "--report", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3


def test_cli_errors(tmp_path, capsys):
    p = _write_cfg(tmp_path, "mx = 20\nbogus = 1\n")
    assert cli.main(["run", str(p)]) != 0
    err = capsys.readouterr().err
    assert "c.cfg:2" in err and "bogus" in err
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) != 0
    assert "missing.cfg" in capsys.readouterr().err
