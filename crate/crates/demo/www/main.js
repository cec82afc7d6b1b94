import init, { template, corrupt, schedule_curve, Lab } from "./pkg/inscorr_demo.js";

const SIDE = 16;
const $ = (id) => document.getElementById(id);

function paint(canvas, grid) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(SIDE, SIDE);
  for (let i = 0; i < SIDE * SIDE; i++) {
    const v = Math.round(255 * Math.min(1, Math.max(0, grid[i])));
    img.data.set([v, v, v, 255], 4 * i);
  }
  const tmp = new OffscreenCanvas(SIDE, SIDE);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function preview() {
  const g = template(Number($("cls").value));
  paint($("clean"), g);
  paint($("dirty"), corrupt(g, $("kind").value, Number($("strength").value), 1n));
}

function curve() {
  const tau = Number($("tau").value);
  $("tauv").textContent = tau.toFixed(2);
  const r = schedule_curve(tau, Number($("tk").value), 50);
  const c = $("curve"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#36c";
  ctx.beginPath();
  r.forEach((y, t) => {
    const px = (t / (r.length - 1)) * (c.width - 20) + 10;
    const py = c.height - 10 - y * (c.height - 20);
    t ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
}

function fmt(p) {
  return Array.from(p, (v, i) => `class ${i}: ${v.toFixed(3)}`).join("\n");
}

await init();
const lab = new Lab(7n);

$("train").onclick = () => {
  const acc = lab.train_epoch();
  $("acc").textContent = `epoch ${lab.epochs()}, test accuracy ${acc.toFixed(3)}`;
};

$("fix").onclick = () => {
  const x = lab.ood_instance(Number($("ood").value));
  const r = lab.correct(x, Number($("target").value), Number($("budget").value), 40);
  paint($("before"), x);
  paint($("after"), r.corrected);
  $("probs").textContent =
    `before\n${fmt(lab.probabilities(x))}\n\nafter (${r.success ? "success" : "missed"})\n${fmt(r.probabilities)}`;
};

for (const id of ["cls", "kind", "strength"]) $(id).oninput = preview;
for (const id of ["tau", "tk"]) $(id).oninput = curve;
preview();
curve();
