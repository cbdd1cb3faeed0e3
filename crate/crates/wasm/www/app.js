import init, { powerTable, mdesSearch, iccHeatmap, engineVersion } from "./pkg/pump_wasm.js";

const $ = (id) => document.getElementById(id);

function request() {
  return JSON.parse($("request").value);
}

function showError(el, e) {
  let text = String(e && e.message ? e.message : e);
  try {
    const body = JSON.parse(text);
    const fields = (body.error.fields || []).map((f) => `${f.field}: ${f.message}`);
    text = fields.length ? fields.join("\n") : body.error.message;
  } catch (_) {}
  el.innerHTML = "";
  const p = document.createElement("p");
  p.className = "err";
  p.textContent = text;
  el.appendChild(p);
}

function fmt(cell) {
  return cell ? `${cell.value.toFixed(3)} ± ${cell.mc_se.toFixed(3)}` : "";
}

function renderTable(el, rows) {
  const defs = [];
  for (const r of rows) for (const k of Object.keys(r)) if (k !== "MTP" && !defs.includes(k)) defs.push(k);
  const head = `<tr><th>MTP</th>${defs.map((d) => `<th>${d}</th>`).join("")}</tr>`;
  const body = rows.map((r) => `<tr><th>${r.MTP}</th>${defs.map((d) => `<td>${fmt(r[d])}</td>`).join("")}</tr>`);
  el.innerHTML = `<table>${head}${body.join("")}</table>`;
}

function runPower() {
  const out = $("power-out");
  try {
    const resp = JSON.parse(powerTable(JSON.stringify(request())));
    renderTable(out, resp.result.rows);
  } catch (e) {
    showError(out, e);
  }
}

function runMdes() {
  const out = $("mdes-out");
  try {
    const body = request();
    delete body.MDES;
    body["target.power"] = Number($("target").value);
    body["power.definition"] = $("definition").value;
    const resp = JSON.parse(mdesSearch(JSON.stringify(body)));
    const r = resp.result;
    out.textContent = `MDES ${r.value.toFixed(4)}, power ${r.achieved_power.toFixed(3)} ± ${r.mc_se.toFixed(3)}, ` +
      `${r.steps} steps, ${r.converged ? "converged" : "not converged"}`;
  } catch (e) {
    showError(out, e);
  }
}

function numbers(text) {
  return new Float64Array(text.split(",").map((s) => Number(s.trim())));
}

function color(v) {
  const h = 240 - 240 * v;
  return `hsl(${h}, 70%, 55%)`;
}

function runHeat() {
  const out = $("heat-out");
  out.textContent = "";
  try {
    const base = request();
    delete base["ICC.2"];
    delete base["ICC.3"];
    base.tnum = Math.min(base.tnum || 1000, 2000);
    const res = JSON.parse(iccHeatmap(JSON.stringify(base), numbers($("icc2").value), numbers($("icc3").value),
      $("hm-mtp").value, $("hm-def").value));
    drawHeat(res);
  } catch (e) {
    showError(out, e);
  }
}

function drawHeat(res) {
  const c = $("heat");
  const ctx = c.getContext("2d");
  const pad = 60;
  const w = (c.width - pad - 10) / res.icc3.length;
  const h = (c.height - pad - 10) / res.icc2.length;
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.font = "11px sans-serif";
  ctx.textAlign = "center";
  ctx.textBaseline = "middle";
  res.values.forEach((row, i) => {
    row.forEach((v, j) => {
      const x = pad + j * w;
      const y = 10 + i * h;
      ctx.fillStyle = v === null ? "#eee" : color(v);
      ctx.fillRect(x, y, w - 1, h - 1);
      ctx.fillStyle = "#000";
      ctx.fillText(v === null ? "invalid" : v.toFixed(2), x + w / 2, y + h / 2);
    });
    ctx.textAlign = "right";
    ctx.fillText(String(res.icc2[i]), pad - 6, 10 + i * h + h / 2);
    ctx.textAlign = "center";
  });
  res.icc3.forEach((v, j) => ctx.fillText(String(v), pad + j * w + w / 2, c.height - pad + 20));
  ctx.fillText("ICC.3", pad + (c.width - pad) / 2, c.height - 15);
  ctx.save();
  ctx.translate(14, (c.height - pad) / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText("ICC.2", 0, 0);
  ctx.restore();
  $("heat-out").textContent = `${res.MTP} ${res.definition}, seed ${res.seed}`;
}

await init();
$("version").textContent = engineVersion();
$("run-power").addEventListener("click", runPower);
$("run-mdes").addEventListener("click", runMdes);
$("run-heat").addEventListener("click", runHeat);
