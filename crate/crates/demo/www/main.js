import init, { Session } from "./pkg/radsym_demo.js";

const $ = (id) => document.getElementById(id);
let session;

function paint(canvas, values, n, top) {
  canvas.width = n;
  canvas.height = n;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(n, n);
  for (let k = 0; k < n * n; k++) {
    const t = top > 0 ? values[k] / top : 0;
    img.data[4 * k] = Math.round(255 * Math.min(1, 1.6 * t));
    img.data[4 * k + 1] = Math.round(255 * t * t);
    img.data[4 * k + 2] = Math.round(90 * (1 - t));
    img.data[4 * k + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
}

function render(note) {
  const n = session.cells();
  const u = session.values();
  const star = session.star_values();
  const top = Math.max(...star);
  paint($("field"), u, n, top);
  paint($("star"), star, n, top);
  $("status").textContent =
    `steps ${session.steps()}  |u - u*|_2 = ${session.distance().toExponential(3)}` +
    `  E = ${session.energy().toFixed(6)}${note ? "  " + note : ""}`;
}

function reset() {
  session?.free();
  session = new Session(Number($("cells").value), Number($("seed").value));
  render();
}

await init();
$("reset").onclick = reset;
$("polarize").onclick = () => { session.polarize(20); render(); };
$("symmetrize").onclick = () => { session.symmetrize(); render(); };
$("minimize").onclick = () => {
  $("status").textContent = "minimizing…";
  setTimeout(() => {
    const t0 = performance.now();
    session.minimize(5000);
    render(`(${((performance.now() - t0) / 1000).toFixed(1)} s)`);
  }, 10);
};
reset();
