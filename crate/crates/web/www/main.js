import init, { analyze, encode, impedance_sweep } from "./pkg/scgenie_web.js";

const PRESETS = {
  halver: {
    doc: {
      version: 1, n_modes: 1, ports: { vin: "VIN", vout: "VOUT", gnd: "GND" },
      switches: [
        { id: 1, a: "VIN", b: "p1", ctrl: "01" },
        { id: 2, a: "n1", b: "VOUT", ctrl: "01" },
        { id: 3, a: "p1", b: "VOUT", ctrl: "10" },
        { id: 4, a: "n1", b: "GND", ctrl: "10" },
      ],
      capacitors: [{ id: 1, p: "p1", n: "n1" }],
    },
    targets: "1/2",
  },
  third: {
    doc: {
      version: 1, n_modes: 1, ports: { vin: "VIN", vout: "VOUT", gnd: "GND" },
      switches: [
        { id: 1, a: "VIN", b: "p1", ctrl: "01" },
        { id: 2, a: "n1", b: "p2", ctrl: "01" },
        { id: 3, a: "n2", b: "VOUT", ctrl: "01" },
        { id: 4, a: "p1", b: "VOUT", ctrl: "10" },
        { id: 5, a: "n1", b: "GND", ctrl: "10" },
        { id: 6, a: "p2", b: "VOUT", ctrl: "10" },
        { id: 7, a: "n2", b: "GND", ctrl: "10" },
      ],
      capacitors: [{ id: 1, p: "p1", n: "n1" }, { id: 2, p: "p2", n: "n2" }],
    },
    targets: "1/3",
  },
};

const $ = (id) => document.getElementById(id);
const out = $("out");

function show(text, isError = false) {
  out.textContent = text;
  out.className = isError ? "err" : "";
}

function guarded(f) {
  return () => {
    try {
      f();
    } catch (e) {
      show(String(e), true);
    }
  };
}

function loadPreset(name) {
  const p = PRESETS[name];
  $("doc").value = JSON.stringify(p.doc, null, 2);
  $("targets").value = p.targets;
}

function plot(points) {
  const canvas = $("plot");
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 50;
  ctx.clearRect(0, 0, w, h);
  const lx = points.map((p) => Math.log10(p.f));
  const series = ["ssl", "fsl", "total"];
  const ly = points.flatMap((p) => series.map((k) => Math.log10(p[k])));
  const [x0, x1] = [Math.min(...lx), Math.max(...lx)];
  let [y0, y1] = [Math.min(...ly), Math.max(...ly)];
  if (y1 - y0 < 1e-9) { y0 -= 0.5; y1 += 0.5; }
  const sx = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - y0) / (y1 - y0)) * (h - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#333";
  ctx.font = "11px sans-serif";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  for (let d = Math.ceil(x0); d <= Math.floor(x1); d++) {
    ctx.fillText(`1e${d}`, sx(d) - 12, h - pad + 14);
  }
  for (let d = Math.ceil(y0); d <= Math.floor(y1); d++) {
    ctx.fillText(`1e${d}`, 4, sy(d) + 4);
  }
  ctx.fillText("f (Hz)", w / 2, h - 10);

  const colors = { ssl: "#1f77b4", fsl: "#2ca02c", total: "#d62728" };
  series.forEach((k, i) => {
    ctx.strokeStyle = colors[k];
    ctx.lineWidth = k === "total" ? 2 : 1;
    ctx.beginPath();
    points.forEach((p, j) => {
      const x = sx(lx[j]), y = sy(Math.log10(p[k]));
      j === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    });
    ctx.stroke();
    ctx.fillStyle = colors[k];
    ctx.fillText(k.toUpperCase(), w - pad - 60, pad + 14 + 14 * i);
  });
}

await init();
loadPreset("halver");
$("preset").addEventListener("change", (e) => loadPreset(e.target.value));

$("run-analyze").addEventListener("click", guarded(() => {
  const report = JSON.parse(analyze($("doc").value, $("targets").value));
  show(JSON.stringify(report, null, 2));
}));

$("run-encode").addEventListener("click", guarded(() => {
  const r = JSON.parse(encode(
    $("doc").value,
    BigInt($("seed").value || 0),
    Number($("max-sw").value),
    Number($("max-cap").value),
  ));
  show(`round trip: ${r.round_trip}\n\n${r.names.join(" ")}\n\n${r.tokens.join(" ")}\n\n${r.dot}`);
}));

$("run-sweep").addEventListener("click", guarded(() => {
  const r = JSON.parse(impedance_sweep(
    $("doc").value,
    $("targets").value,
    Number($("mode").value),
    Number($("fmin").value),
    Number($("fmax").value),
    120,
    Number($("cap").value),
    Number($("ron").value),
  ));
  plot(r.points);
  const last = r.points[r.points.length - 1];
  show(`mode ${r.mode}, ratio ${r.ratio}, FSL floor ${last.fsl.toExponential(3)} Ω`);
}));
