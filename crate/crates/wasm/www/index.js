import init, {
  builtinNetworks, unitCost, networkSummary, unitNodes, randomBoxes, nmsKeep, priorBoxes,
} from "./pkg/wrin_wasm.js";

const $ = (id) => document.getElementById(id);
const fmt = (n) => Number(n).toLocaleString("en-US");

function rows(table, pairs) {
  table.innerHTML = pairs.map(([k, v]) => `<tr><td>${k}</td><td>${v}</td></tr>`).join("");
}

function updateCost() {
  const width = Number($("width").value);
  $("width-val").textContent = width;
  $("cost-error").textContent = "";
  try {
    const u = JSON.parse(unitCost(width));
    rows($("unit-table"), [
      ["basic unit MACs / position", fmt(u.basic_macs)],
      ["inception branch MACs / position", fmt(u.branch_macs)],
      ["inception unit MACs / position", fmt(u.inception_macs)],
      ["inception / basic", u.ratio.toFixed(4)],
      ["receptive paths (basic)", u.basic_paths.join(", ")],
      ["receptive paths (inception)", u.inception_paths.join(", ")],
    ]);
    const s = JSON.parse(networkSummary($("net").value, Number($("side").value)));
    rows($("net-table"), [
      ["network", s.name],
      ["parameters", fmt(s.params)],
      ["multiply-accumulates", fmt(s.macs)],
      ["graph nodes", s.nodes],
      ...s.stages.map((st, i) => [`stage ${i + 1}`, `${st.units} x ${st.variant} -> ${st.out_channels} ch`]),
    ]);
    $("unit-nodes").textContent = JSON.parse(unitNodes($("variant").value, width)).join("\n");
  } catch (e) {
    $("cost-error").textContent = String(e);
  }
}

let boxes = [];
let seed = 1;

function drawBox(ctx, b, size, style, width) {
  ctx.strokeStyle = style;
  ctx.lineWidth = width;
  ctx.strokeRect(b[0] * size, b[1] * size, (b[2] - b[0]) * size, (b[3] - b[1]) * size);
}

function updateNms() {
  const thr = Number($("nms-thr").value);
  $("nms-thr-val").textContent = thr.toFixed(2);
  const keep = JSON.parse(nmsKeep(JSON.stringify(boxes), thr));
  const kept = new Set(keep);
  const canvas = $("nms-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  boxes.forEach((b, i) => {
    if (!kept.has(i)) drawBox(ctx, [b.xmin, b.ymin, b.xmax, b.ymax], canvas.width, "rgba(120,120,120,0.35)", 1);
  });
  keep.forEach((i) => {
    const b = boxes[i];
    drawBox(ctx, [b.xmin, b.ymin, b.xmax, b.ymax], canvas.width, "#d32f2f", 2.5);
    ctx.fillStyle = "#d32f2f";
    ctx.fillText(b.score.toFixed(2), b.xmin * canvas.width + 3, b.ymin * canvas.height + 12);
  });
  $("nms-info").textContent = `${keep.length} of ${boxes.length} boxes kept`;
}

function reshuffle() {
  seed += 1;
  boxes = JSON.parse(randomBoxes(seed, Number($("nms-n").value)));
  updateNms();
}

function updatePriors() {
  const grid = Number($("grid").value);
  const scale = Number($("scale").value);
  $("grid-val").textContent = `${grid} x ${grid}`;
  $("scale-val").textContent = scale.toFixed(2);
  const ratios = new Float64Array($("ratios").value.split(",").map(Number).filter((r) => r > 0));
  const canvas = $("prior-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  try {
    const priors = JSON.parse(priorBoxes(grid, scale, Math.min(1, scale + 0.15), ratios));
    const perCell = priors.length / (grid * grid);
    const cell = Math.min(Number($("cell").value), grid * grid - 1);
    ctx.strokeStyle = "#ccc";
    ctx.lineWidth = 1;
    for (let i = 1; i < grid; i++) {
      const p = (i / grid) * canvas.width;
      ctx.beginPath(); ctx.moveTo(p, 0); ctx.lineTo(p, canvas.height); ctx.stroke();
      ctx.beginPath(); ctx.moveTo(0, p); ctx.lineTo(canvas.width, p); ctx.stroke();
    }
    priors.slice(cell * perCell, (cell + 1) * perCell).forEach((b, k) => {
      drawBox(ctx, b, canvas.width, `hsl(${(k * 360) / perCell}, 70%, 45%)`, 2);
    });
    $("prior-info").className = "";
    $("prior-info").textContent = `${priors.length} priors on this map (${perCell} per cell); showing cell ${cell}`;
  } catch (e) {
    $("prior-info").className = "error";
    $("prior-info").textContent = String(e);
  }
}

await init();
for (const name of JSON.parse(builtinNetworks())) {
  $("net").add(new Option(name, name, name === "wr-inception", name === "wr-inception"));
}
for (const id of ["width", "net", "side", "variant"]) $(id).addEventListener("input", updateCost);
$("nms-thr").addEventListener("input", updateNms);
$("nms-n").addEventListener("change", reshuffle);
$("nms-shuffle").addEventListener("click", reshuffle);
for (const id of ["grid", "scale", "ratios", "cell"]) $(id).addEventListener("input", updatePriors);
updateCost();
reshuffle();
updatePriors();
