import { InboxApp } from "./app.js";
import { GatewayClient } from "./gateway.js";

/** Browser entry point.  Reads everything from the query string:
 *    ?human=Jen&gateway=http://127.0.0.1:8400&poll=3000
 * `gateway` defaults to the page's own origin (serve the page next to the
 * gateway or through a proxy; the gateway sets no CORS headers), `poll` to
 * 3000 ms. */
function boot(): void {
  const root = document.getElementById("app");
  if (!root) return;
  const params = new URLSearchParams(window.location.search);
  const human = params.get("human");
  if (!human) {
    root.textContent = "Add ?human=<id> (and optionally &gateway=<url>&poll=<ms>) to the URL.";
    return;
  }
  const gateway = params.get("gateway") ?? window.location.origin;
  const pollRaw = Number(params.get("poll") ?? "3000");
  const pollMs = Number.isFinite(pollRaw) && pollRaw >= 0 ? pollRaw : 3000;
  const app = new InboxApp(root, new GatewayClient(gateway), human, { pollMs });
  void app.start();
}

boot();
