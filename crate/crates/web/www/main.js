// Glue for the demo page. `pkg/` is produced by
//   wasm-bindgen --target web --out-dir crates/web/www/pkg \
//     target/wasm32-unknown-unknown/release/affield_web.wasm
import init, { Demo } from "./pkg/affield_web.js";

const PALETTE = [[240, 240, 240], [66, 133, 244], [219, 68, 55]];
const $ = (id) => document.getElementById(id);

let demo;

function status(msg) {
  $("status").textContent = msg || "";
}

function paint(id, rgbAt) {
  const c = $(id);
  const ctx = c.getContext("2d");
  const img = ctx.createImageData(demo.width(), demo.height());
  for (let i = 0; i < demo.width() * demo.height(); i++) {
    const [r, g, b] = rgbAt(i);
    img.data.set([r, g, b, 255], 4 * i);
  }
  ctx.putImageData(img, 0, 0);
}

function paintLabels(id, labels) {
  paint(id, (i) => PALETTE[labels[i] % PALETTE.length]);
}

function paintScalar(id, values, lo, hi) {
  const span = hi > lo ? hi - lo : 1;
  paint(id, (i) => {
    const t = Math.min(1, Math.max(0, (values[i] - lo) / span));
    return [Math.round(255 * t), Math.round(80 * (1 - t)), Math.round(255 * (1 - t))];
  });
}

function range(values) {
  let lo = Infinity, hi = -Infinity;
  for (const v of values) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  return [lo, hi];
}

function drawScene() {
  paintLabels("gt", demo.labels());
  const a = demo.appearance();
  paintScalar("feat", a, ...range(a));
  drawPrediction();
  drawHeat();
}

function drawPrediction() {
  paintLabels("pred", demo.prediction());
}

function drawHeat() {
  const k = Number($("k").value);
  const m = demo.affinity_map(k, Number($("margin").value));
  const [lo, hi] = range(m);
  paintScalar("aff", m, 0, hi);
  $("affcap").textContent = `affinity loss, k=${k} (max ${hi.toFixed(2)})`;
}

function showSummary(s) {
  let html = `<p>${s.mode}: ${s.iters} iterations, final loss ${s.final_loss.toFixed(4)},
    accuracy on shown scene ${(100 * s.pixel_accuracy).toFixed(1)}%</p>`;
  if (s.classes.length) {
    html += `<table><tr><th>class</th><th>edge k<sub>eff</sub></th><th>non-edge k<sub>eff</sub></th></tr>`;
    for (const c of s.classes) {
      html += `<tr><td>${c.name}</td><td>${c.k_edge.toFixed(2)}</td><td>${c.k_nonedge.toFixed(2)}</td></tr>`;
    }
    html += `</table><p>Effective kernel size = Σ<sub>k</sub> w<sub>k</sub>·k over kernels ${s.kernel_sizes.join(", ")}.</p>`;
  }
  $("summary").innerHTML = html;
}

function guard(fn) {
  return () => {
    status("");
    try { fn(); } catch (e) { status(String(e.message || e)); }
  };
}

async function main() {
  await init();
  demo = new Demo(7n);
  $("scene").onclick = guard(() => {
    demo.show_scene(Number($("index").value), Number($("sigma").value), Number($("bleed").value));
    drawScene();
  });
  $("heat").onclick = guard(drawHeat);
  $("k").onchange = guard(drawHeat);
  $("train").onclick = () => {
    status("training…");
    // let the status paint before the (synchronous) training run
    setTimeout(guard(() => {
      const ks = new Uint32Array($("ks").value.split(",").map((s) => Number(s.trim())));
      const json = demo.train($("mode").value, ks, Number($("scenes").value),
        Number($("iters").value), 0.01, 0.05);
      showSummary(JSON.parse(json));
      $("predcap").textContent = "prediction (trained model)";
      drawPrediction();
      drawHeat();
    }), 20);
  };
  $("forget").onclick = guard(() => {
    demo.forget_model();
    $("summary").innerHTML = "";
    $("predcap").textContent = "prediction (nearest mean)";
    drawPrediction();
    drawHeat();
  });
  $("predcap").textContent = "prediction (nearest mean)";
  drawScene();
}

main().catch((e) => status(String(e)));
