import json

import numpy as np
import pytest
from PIL import Image

from volstc.cli import build_parser, main
from volstc.model import read_dataset, read_volume, write_volume

from test_service import block_volume


@pytest.fixture()
def station_files(tmp_path):
    stations = tmp_path / "stations.csv"
    stations.write_text(
        "id,lon,lat\n"
        "a,0.5,0.5\n"
        "b,7.5,0.5\n"
        "c,0.5,7.5\n"
        "d,7.5,7.5\n"
        "e,4.0,4.0\n")
    lines = ["id,timestamp,value"]
    for t in range(6):
        ts = t * 3600
        for sid, base in zip("abcde", (10.0, 20.0, 30.0, 40.0, 25.0)):
            lines.append(f"{sid},{ts},{base + t}")
    readings = tmp_path / "readings.csv"
    readings.write_text("\n".join(lines) + "\n")
    return stations, readings


def test_ingest_then_transform(tmp_path, station_files, capsys):
    stations, readings = station_files
    dataset_path = tmp_path / "data.vsd"
    rc = main(["ingest", "--stations", str(stations),
               "--readings", str(readings),
               "--t0", "0", "--dt", "3600", "--steps", "6",
               "--vmin", "0", "--vmax", "100",
               "--out", str(dataset_path)])
    assert rc == 0
    assert "5 stations x 6 steps" in capsys.readouterr().out
    dataset = read_dataset(dataset_path)
    assert dataset.T == 6
    assert len(dataset.stations) == 5

    volume_path = tmp_path / "vol.vstc"
    rc = main(["transform", "--in", str(dataset_path),
               "--grid", "8x8", "--extent", "0,0,8,8",
               "--method", "idw", "--window", "3",
               "--out", str(volume_path)])
    assert rc == 0
    volume = read_volume(volume_path)
    assert volume.data.shape == (6, 8, 8)
    assert volume.value_range == (0.0, 100.0)


def test_ingest_error_paths(tmp_path, station_files, capsys):
    stations, _ = station_files
    rc = main(["ingest", "--stations", str(stations),
               "--readings", str(tmp_path / "missing.csv"),
               "--t0", "0", "--dt", "3600", "--steps", "6",
               "--vmin", "0", "--vmax", "100",
               "--out", str(tmp_path / "x.vsd")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


@pytest.fixture()
def volume_file(tmp_path):
    path = tmp_path / "block.vstc"
    write_volume(path, block_volume())
    return path


def test_render_default_camera(tmp_path, volume_file):
    out = tmp_path / "frame.png"
    rc = main(["render", "--volume", str(volume_file),
               "--size", "64x48", "--lambda-v", "10",
               "--out", str(out)])
    assert rc == 0
    with Image.open(out) as img:
        assert img.size == (64, 48)
        assert img.mode == "RGBA"


def test_render_full_options(tmp_path, volume_file):
    basemap = tmp_path / "map.png"
    tex = np.zeros((8, 8, 3), dtype=np.uint8)
    tex[:, :, 2] = 255
    Image.fromarray(tex).save(basemap)

    out = tmp_path / "frame.png"
    rc = main(["render", "--volume", str(volume_file),
               "--camera", "8,-30,16/8,8,8/0,0,1/35",
               "--size", "48x48", "--lambda-v", "5",
               "--surface", "--lambda-i", "40",
               "--trange", "5:1", "--spot", "8,8,6",
               "--map", str(basemap),
               "--out", str(out)])
    assert rc == 0
    assert out.exists()


def test_render_deterministic(tmp_path, volume_file):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    argv = ["render", "--volume", str(volume_file), "--size", "40x40",
            "--lambda-v", "10"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_clusters_command(tmp_path, volume_file):
    out = tmp_path / "clusters.json"
    rc = main(["clusters", "--volume", str(volume_file),
               "--lambda-a", "50", "--eps", "3", "--min-pts", "10",
               "--out", str(out)])
    assert rc == 0
    clusters = json.loads(out.read_text())
    assert len(clusters) == 1
    summary = clusters[0]
    assert set(summary) == {"id", "member_count", "t_min", "t_max",
                            "circle", "value_max", "centroid"}
    assert summary["member_count"] == 144
    assert (summary["t_min"], summary["t_max"]) == (2, 5)


def test_clusters_none_found(tmp_path, volume_file):
    out = tmp_path / "clusters.json"
    rc = main(["clusters", "--volume", str(volume_file),
               "--lambda-a", "500", "--out", str(out)])
    assert rc == 0
    assert json.loads(out.read_text()) == []


def test_missing_volume_reports_error(tmp_path, capsys):
    rc = main(["render", "--volume", str(tmp_path / "no.vstc"),
               "--out", str(tmp_path / "x.png")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_parser_rejects_malformed_args():
    parser = build_parser()
    for argv in [
        ["transform", "--in", "d.vsd", "--grid", "8by8",
         "--extent", "0,0,1,1", "--out", "v.vstc"],
        ["transform", "--in", "d.vsd", "--grid", "8x8",
         "--extent", "0,0,1", "--out", "v.vstc"],
        ["render", "--volume", "v.vstc", "--size", "64", "--out", "f.png"],
        ["render", "--volume", "v.vstc", "--camera", "1,2,3/4,5,6/35",
         "--out", "f.png"],
        ["render", "--volume", "v.vstc", "--trange", "3", "--out", "f.png"],
        ["nonsense"],
    ]:
        with pytest.raises(SystemExit):
            parser.parse_args(argv)


def test_serve_parser_defaults():
    args = build_parser().parse_args(["serve"])
    assert args.port == 8000
    assert args.host == "127.0.0.1"
    assert args.map_path is None
