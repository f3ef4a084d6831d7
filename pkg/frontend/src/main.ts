import { AppController, APP_TEMPLATE } from "./app.js";
import { FolioClient } from "./api.js";

const mount = document.getElementById("app");
if (!mount) throw new Error("missing #app mount point");
mount.innerHTML = APP_TEMPLATE;

// Same-origin by default; set window.FOLIO_API_BASE before loading to point
// the UI at a remote service.
const base = (window as { FOLIO_API_BASE?: string }).FOLIO_API_BASE ?? "";
const controller = new AppController(mount, new FolioClient(base), { streaming: true });
void controller.init();
