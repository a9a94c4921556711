import init, { similarity, postprocess, anchors } from "./pkg/reefdet_wasm.js";

const $ = (id) => document.getElementById(id);

function bindRange(input, run) {
  const show = () => { if (input.nextElementSibling) input.nextElementSibling.textContent = input.value; };
  input.addEventListener("input", () => { show(); run(); });
  show();
}

function call(out, f) {
  try {
    const v = JSON.parse(f());
    out.classList.remove("err");
    return v;
  } catch (e) {
    out.textContent = String(e.message ?? e);
    out.classList.add("err");
    return null;
  }
}

function rect(ctx, b, scale, style, width = 1) {
  ctx.strokeStyle = style;
  ctx.lineWidth = width;
  ctx.strokeRect(b[0] * scale, b[1] * scale, (b[2] - b[0]) * scale, (b[3] - b[1]) * scale);
}

const fmt = (v) => (v === null || v === undefined ? "n/a" : Number(v).toFixed(4));

// IoU family explorer
const iouState = { gt: [140, 100, 260, 190], pred: [170, 130, 300, 210], drag: null };

function runIou() {
  const out = $("iou-out");
  const c = $("iou-canvas");
  const v = call(out, () =>
    similarity(new Float64Array(iouState.pred), new Float64Array(iouState.gt), c.width, c.height,
      Number($("iou-sigma").value), Number($("iou-seed").value)));
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  if (v) v.backgrounds.forEach((b) => rect(ctx, b, 1, "#999"));
  rect(ctx, iouState.gt, 1, "#4fd", 2);
  rect(ctx, iouState.pred, 1, "#fa3", 2);
  if (!v) return;
  const g = v.ciou_gradient;
  out.textContent = [
    `IoU   ${fmt(v.iou)}`,
    `GIoU  ${fmt(v.giou)}`,
    `DIoU  ${fmt(v.diou)}`,
    `CIoU  ${fmt(v.ciou)}`,
    `dCIoU/d(x1,y1,x2,y2)  ${g ? g.map(fmt).join(", ") : "n/a"}`,
    ``,
    `L_ciou   ${fmt(v.l_ciou)}`,
    `L_raiou  ${fmt(v.l_raiou)}`,
    `total    ${fmt(v.total)}`,
    v.note ? `\n${v.note}` : "",
  ].join("\n");
}

function setupIou() {
  const c = $("iou-canvas");
  c.addEventListener("mousedown", (e) => { iouState.drag = { x: e.offsetX, y: e.offsetY, shift: e.shiftKey, start: [...iouState.pred] }; });
  window.addEventListener("mouseup", () => { iouState.drag = null; });
  c.addEventListener("mousemove", (e) => {
    const d = iouState.drag;
    if (!d) return;
    const dx = e.offsetX - d.x, dy = e.offsetY - d.y;
    const s = d.start;
    iouState.pred = d.shift
      ? [s[0], s[1], Math.max(s[0], s[2] + dx), Math.max(s[1], s[3] + dy)]
      : [s[0] + dx, s[1] + dy, s[2] + dx, s[3] + dy];
    runIou();
  });
  bindRange($("iou-sigma"), runIou);
  $("iou-seed").addEventListener("input", runIou);
  runIou();
}

// post-processing cloud
function runPost() {
  const out = $("post-out");
  const v = call(out, () =>
    postprocess(Number($("post-n").value), Number($("post-seed").value),
      Number($("post-nms").value), Number($("post-wbf").value)));
  const c = $("post-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  if (!v) return;
  const scale = c.width / 640;
  const stage = v.stages[Number($("post-stage").value)];
  v.stages[0].boxes.forEach((b) => rect(ctx, b, scale, "rgba(255,255,255,0.15)"));
  stage.boxes.forEach((b) => rect(ctx, b, scale, `hsl(${40 + 80 * b[4]}, 90%, 60%)`, 2));
  out.textContent = v.stages.map((s) => `${s.name.padEnd(18)} ${s.boxes.length} boxes`).join("\n")
    + `\nrefinement rounds   ${v.refine_iterations}`;
}

function setupPost() {
  ["post-n", "post-nms", "post-wbf"].forEach((id) => bindRange($(id), runPost));
  $("post-seed").addEventListener("input", runPost);
  $("post-stage").addEventListener("change", runPost);
  runPost();
}

// anchors
const anchorState = { gts: [40, 30, 100, 80] };

function runAnchors() {
  const out = $("anchor-out");
  const c = $("anchor-canvas");
  const scale = 2;
  const v = call(out, () =>
    anchors(new Float64Array(anchorState.gts), c.width / scale, c.height / scale, Number($("anchor-stride").value),
      Number($("anchor-pos").value), 0.4, Number($("anchor-k").value), 7));
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  if (!v) return;
  v.backgrounds.forEach((b) => rect(ctx, b, scale, "#888"));
  v.positives.forEach((p) => rect(ctx, p.anchor, scale, "#fa3"));
  for (let i = 0; i < anchorState.gts.length; i += 4) rect(ctx, anchorState.gts.slice(i, i + 4), scale, "#4fd", 2);
  out.textContent = [
    `anchor shapes (w x h):`,
    ...v.shapes.map(([w, h]) => `  ${w.toFixed(1)} x ${h.toFixed(1)}`),
    `anchors ${v.anchors}, positive ${v.positives.length}, ignored ${v.ignored}`,
    `background samples ${v.backgrounds.length}`,
  ].join("\n");
}

function setupAnchors() {
  const c = $("anchor-canvas");
  c.addEventListener("click", (e) => {
    const x = e.offsetX / 2, y = e.offsetY / 2;
    anchorState.gts.push(x - 20, y - 15, x + 20, y + 15);
    runAnchors();
  });
  $("anchor-clear").addEventListener("click", () => { anchorState.gts = []; runAnchors(); });
  $("anchor-stride").addEventListener("change", runAnchors);
  ["anchor-pos", "anchor-k"].forEach((id) => bindRange($(id), runAnchors));
  runAnchors();
}

init().then(() => {
  $("status").textContent = "";
  setupIou();
  setupPost();
  setupAnchors();
}).catch((e) => {
  $("status").textContent = `failed to load wasm: ${e}`;
  $("status").classList.add("err");
});
