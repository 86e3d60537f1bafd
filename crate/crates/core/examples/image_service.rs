//! An image-compression service whose compute unit is unloaded halfway
//! through. The image field follows the work back to the host once, then
//! stays there.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rpcacc::cu::Kernel;
use rpcacc::harness::ImageService;
use rpcacc::platform::PlatformConfig;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut svc = ImageService::new(PlatformConfig::default(), true).unwrap();
    svc.program(Kernel::rle_compress()).unwrap();
    for id in 1..=8 {
        if id == 4 {
            println!("-- compute unit reprogrammed away from compression");
            svc.program(Kernel::unavailable()).unwrap();
        }
        let req = svc.request(id, ImageService::image(&mut rng, 32 * 1024));
        let step = svc.handle(id as usize, &req).unwrap();
        println!(
            "request {id}: {:>8.0} ns, {:>6} B over the link, on {}, moved {}, Photo.image acc bit {}",
            step.row.elapsed_ns,
            step.row.link_bytes(),
            if step.on_cu { "cu" } else { "cpu" },
            step.moved,
            svc.p.table.placement(svc.photo, 1)
        );
    }
}
