import init, { gamma_curve, suppression, coverage_rgba, tile_counts } from "./pkg/dcvsr_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function bars(canvas, values, color) {
  const g = canvas.getContext("2d");
  g.clearRect(0, 0, canvas.width, canvas.height);
  const max = Math.max(...values, 1e-12);
  const w = canvas.width / values.length;
  g.fillStyle = color;
  values.forEach((v, i) => {
    const h = (v / max) * (canvas.height - 4);
    g.fillRect(i * w + 1, canvas.height - h, Math.max(w - 2, 1), h);
  });
}

function drawGamma() {
  try {
    const c = gamma_curve(num("g-steps"), 0.002, 700, num("g-rho"));
    const gammas = [];
    for (let i = 1; i < c.length; i += 2) gammas.push(c[i]);
    bars($("g-canvas"), gammas, "#3a6ea5");
    $("g-out").textContent = `first sigma=${c[0].toFixed(3)} gamma=${c[1].toFixed(3)}\n` +
      `last  sigma=${c[c.length - 2].toFixed(4)} gamma=${c[c.length - 1].toFixed(4)}`;
  } catch (e) {
    $("g-out").textContent = String(e);
  }
}

function drawSuppression() {
  try {
    const r = suppression(num("s-tokens"), 16, num("s-gamma"), BigInt(num("s-seed")));
    bars($("s-canvas"), Array.from(r.slice(3)), "#a5523a");
    $("s-out").textContent = `gamma=${num("s-gamma").toFixed(2)} temperature=${r[0].toFixed(3)}\n` +
      `mean entropy=${r[1].toFixed(4)} (uniform ${r[2].toFixed(4)})`;
  } catch (e) {
    $("s-out").textContent = String(e);
  }
}

function drawTiles() {
  const [h, w] = [num("t-h"), num("t-w")];
  try {
    const rgba = coverage_rgba(h, w, num("t-th"), num("t-tw"), num("t-sf"));
    const [rows, cols] = tile_counts(h, w, num("t-th"), num("t-tw"));
    const canvas = $("t-canvas");
    const scale = Math.max(1, Math.floor(640 / w));
    canvas.width = w;
    canvas.height = h;
    canvas.style.width = `${w * scale}px`;
    canvas.style.height = `${h * scale}px`;
    canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
    $("t-out").textContent = `${rows} x ${cols} tiles; white pixels mark tile origins`;
  } catch (e) {
    $("t-out").textContent = String(e);
  }
}

await init();
for (const id of ["g-steps", "g-rho"]) $(id).addEventListener("input", drawGamma);
for (const id of ["s-tokens", "s-gamma", "s-seed"]) $(id).addEventListener("input", drawSuppression);
for (const id of ["t-h", "t-w", "t-th", "t-tw", "t-sf"]) $(id).addEventListener("input", drawTiles);
drawGamma();
drawSuppression();
drawTiles();
