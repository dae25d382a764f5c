import init, { Session, potential_curve } from "./pkg/chns_web.js";

const $ = (id) => document.getElementById(id);
const form = $("params");
let session = null;
let running = false;

function paint(canvas, rgba, n) {
  if (rgba.length === 0) return;
  const off = new OffscreenCanvas(n, n);
  off.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), n, n), 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function showEnergies() {
  const e = session.energies();
  $("energies").tBodies[0].rows[0].innerHTML = Array.from(e, (x) => `<td>${x.toPrecision(6)}</td>`).join("");
}

function reset(ev) {
  ev?.preventDefault();
  const f = new FormData(form);
  const num = (k) => Number(f.get(k));
  running = false;
  $("run").textContent = "run";
  try {
    session?.free();
    session = new Session(f.get("scenario"), num("n"), num("length"), num("chi"), num("alpha"),
      num("beta"), num("c0"), num("dt"), BigInt(num("seed")));
    $("status").textContent = "";
    paint($("phase"), session.phi_rgba(), session.n());
    showEnergies();
  } catch (err) {
    session = null;
    $("status").textContent = String(err);
  }
}

function frame() {
  if (!running || !session) return;
  try {
    session.advance(2);
    paint($("phase"), session.phi_rgba(), session.n());
    showEnergies();
    requestAnimationFrame(frame);
  } catch (err) {
    running = false;
    $("run").textContent = "run";
    $("status").textContent = String(err);
  }
}

function toggle() {
  if (!session) return;
  running = !running;
  $("run").textContent = running ? "pause" : "run";
  if (running) requestAnimationFrame(frame);
}

function equilibrate() {
  if (!session) return;
  try {
    const [energy, residual, iters, deficit] = session.equilibrate();
    paint($("equilibrium"), session.equilibrium_rgba(), session.n());
    $("eq-status").textContent =
      `F = ${energy.toPrecision(6)}, residual ${residual.toExponential(1)}, ${iters} iterations, distance ${deficit.toExponential(2)}`;
  } catch (err) {
    $("eq-status").textContent = String(err);
  }
}

function plotPotential() {
  const kind = $("pot-kind").value;
  const canvas = $("potential");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let s;
  try {
    s = potential_curve(kind, Number($("theta").value), Number($("theta0").value), 301);
  } catch (err) {
    ctx.fillText(String(err), 10, 20);
    return;
  }
  const r = [], psi = [];
  for (let k = 0; k < s.length; k += 3) { r.push(s[k]); psi.push(s[k + 1]); }
  const lo = Math.min(...psi), hi = Math.max(...psi);
  const x = (v) => ((v - r[0]) / (r[r.length - 1] - r[0])) * (canvas.width - 20) + 10;
  const y = (v) => canvas.height - 10 - ((v - lo) / (hi - lo || 1)) * (canvas.height - 20);
  ctx.strokeStyle = "#bbb";
  ctx.beginPath(); ctx.moveTo(x(0), 0); ctx.lineTo(x(0), canvas.height); ctx.stroke();
  ctx.strokeStyle = "#c22";
  ctx.beginPath();
  r.forEach((v, k) => (k ? ctx.lineTo(x(v), y(psi[k])) : ctx.moveTo(x(v), y(psi[k]))));
  ctx.stroke();
}

await init();
form.addEventListener("submit", reset);
$("run").addEventListener("click", toggle);
$("equilibrate").addEventListener("click", equilibrate);
for (const id of ["pot-kind", "theta", "theta0"]) $(id).addEventListener("input", plotPotential);
reset();
plotPotential();
